# TCL ensemble dispatch with chance-constrained OPF
