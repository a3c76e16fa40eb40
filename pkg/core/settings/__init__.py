# Settings module initialization