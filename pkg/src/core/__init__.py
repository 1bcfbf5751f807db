# Core Domain Types Module
