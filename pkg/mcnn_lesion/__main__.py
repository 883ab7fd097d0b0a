"""Run the mcnn-lesion CLI with `python -m mcnn_lesion`."""

import sys

from .cli import cli_main

sys.exit(cli_main())
