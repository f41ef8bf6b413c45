# -*- coding: utf-8 -*-

try:
    from .src.facevox import *
except ImportError:
    from src.facevox import *
