
__version__ = '1.0.0'
__author__ = 'pyrejective contributors'
__license__ = 'GPLv3'


#
# Global state indicators
#
verbose = False
colorize = True
