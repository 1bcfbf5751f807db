# Corpus Construction Module
