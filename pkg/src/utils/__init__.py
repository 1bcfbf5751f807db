# Utility Functions Module
