#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.

# setup.py shim for use with applications that require it.
__import__("setuptools").setup()
