# Utility modules

