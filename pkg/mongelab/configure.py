#! /usr/bin/env python
"""Install the default configuration file in the user's home directory"""

import os
import sys
import shutil


def main(argv=None):
    """Copy conf/config.xml to ~/.mongelab/config.xml unless it already exists"""
    argv = sys.argv[1:] if argv is None else argv
    force = '--force' in argv
    packageDir = os.path.dirname(os.path.abspath(__file__))
    configFileDefault = os.path.join(packageDir, 'conf', 'config.xml')
    configDirUser = os.path.join(os.path.expanduser('~'), '.mongelab')
    configFileUser = os.path.join(configDirUser, 'config.xml')

    if os.path.isfile(configFileUser) and not force:
        sys.stdout.write('configuration file ' + configFileUser
                         + ' already exists (use --force to overwrite)\n')
        return 0
    try:
        os.makedirs(configDirUser, exist_ok=True)
        shutil.copyfile(configFileDefault, configFileUser)
    except OSError as exc:
        sys.stderr.write('ERROR: cannot write ' + configFileUser + ': ' + str(exc) + '\n')
        return 1
    sys.stdout.write('wrote configuration file ' + configFileUser + '\n')
    return 0


if __name__ == '__main__':
    sys.exit(main())
