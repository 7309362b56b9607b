# Dataset loaders, splits and checkpoint persistence
