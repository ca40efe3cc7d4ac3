# Service modules

