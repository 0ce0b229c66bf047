from pyrejective import cli

#
# stub for running pyrejective as a package while developing and testing.
#

cli.start()
