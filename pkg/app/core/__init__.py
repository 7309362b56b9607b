# Numerics, models and training procedures
