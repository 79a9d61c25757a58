# SPDX-FileCopyrightText: 2022-present pederhan <pederhan@uio.no>
#
# SPDX-License-Identifier: MIT
from .__about__ import __version__ as __version__
