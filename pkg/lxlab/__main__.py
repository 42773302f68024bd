#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""python -m lxlab"""

from lxlab.cli import main

if __name__ == "__main__":
    main()
