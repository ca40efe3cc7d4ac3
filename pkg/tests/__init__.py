# Tests

