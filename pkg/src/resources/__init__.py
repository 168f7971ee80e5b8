# Run artifact resources
