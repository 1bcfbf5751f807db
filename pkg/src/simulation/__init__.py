# Synthetic Environment Module
