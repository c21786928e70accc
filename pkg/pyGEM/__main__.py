#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import sys

from .gem_cli import main

sys.exit(main())
