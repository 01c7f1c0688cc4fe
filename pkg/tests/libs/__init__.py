"""
Copyright (c) ncurves contributors.

This source code is licensed under the Apache License Version 2.0 found in the
LICENSE file in the root directory of this source tree.

Helpers shared by the test modules: data file lookup, decoding and mixture builders.
"""
