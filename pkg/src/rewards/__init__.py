# Reward Functions Module
