#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
__version__ = "0.1.0"
