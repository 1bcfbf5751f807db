# Evaluator Policy Module
