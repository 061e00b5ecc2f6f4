# Intentionally empty. Makes 'tests' a Python package.