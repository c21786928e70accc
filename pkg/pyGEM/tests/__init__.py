#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
