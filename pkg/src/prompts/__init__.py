# Prompt Template Module
