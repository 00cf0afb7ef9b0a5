"""Parameter and forward-pass cost accounting."""
