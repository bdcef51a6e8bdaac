"""
Columnar spiking network that learns to predict the time to the next reward.

Library modules live here; operator scripts live in execution/.
"""
