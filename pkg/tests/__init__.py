# SPDX-FileCopyrightText: 2022-present pederhan <pederhan@uio.no>
#
# SPDX-License-Identifier: MIT
