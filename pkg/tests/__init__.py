# Test package for vulnscore
