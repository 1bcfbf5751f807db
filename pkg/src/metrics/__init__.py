# Meta-Evaluation Metrics Module
