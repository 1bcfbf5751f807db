# Training Objectives Module
