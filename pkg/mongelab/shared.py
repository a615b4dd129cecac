#! /usr/bin/env python
"""Shared functions module for mongelab"""

import os
import csv
import json
import math


class UsageError(Exception):
    """Invalid command line, configuration or input files (exit code 1)"""


def errorExit(error):
    """Raise UsageError; main() reports it and exits with code 1"""
    raise UsageError(error)


def checkFileExists(fileIn):
    """Check if file exists and exit if not"""
    if not os.path.isfile(fileIn):
        msg = "file " + fileIn + " does not exist!"
        errorExit(msg)


def makeDir(dirIn):
    """Create directory (and parents) if it doesn't exist yet"""
    try:
        os.makedirs(dirIn, exist_ok=True)
    except OSError:
        errorExit("cannot create directory " + dirIn)
    return dirIn


def finiteOrNone(value):
    """Return value as float, or None if it is missing or not finite"""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def writeCSV(fileOut, header, rows):
    """Write rows (lists) to CSV file with header; None becomes empty field"""
    with open(fileOut, 'w', encoding='utf-8', newline='') as fOut:
        csvOut = csv.writer(fOut, lineterminator='\n')
        csvOut.writerow(header)
        for row in rows:
            csvOut.writerow(['' if item is None else item for item in row])


def writeJSON(fileOut, data):
    """Write data structure to JSON file"""
    with open(fileOut, 'w', encoding='utf-8') as fOut:
        json.dump(data, fOut, indent=2, sort_keys=False, allow_nan=False)
