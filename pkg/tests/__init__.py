# Tests package for aecnr-lab
