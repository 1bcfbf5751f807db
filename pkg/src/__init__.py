# Graded Evaluator RL Toolkit
