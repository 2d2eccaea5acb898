#!/usr/bin/env python3
import sys

import restoretune.main

if __name__ == '__main__':
    sys.exit(restoretune.main.main())
