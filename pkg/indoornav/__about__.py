# SPDX-FileCopyrightText: 2022-present pederhan <pederhan@uio.no>
#
# SPDX-License-Identifier: MIT
__version__ = "0.1.0"
APP_NAME = "indoornav"
AUTHOR = "pederhan"
