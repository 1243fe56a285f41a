# Case files and their loaders
