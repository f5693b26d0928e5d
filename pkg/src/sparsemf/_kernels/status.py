"""Status codes shared by the kernel backends."""

OK = 0
ZB_NEGATIVE = 1      # z_b came out negative or non-finite
K_NONPOSITIVE = 2    # tuned k update crossed zero
KZ_UNDERFLOW = 3     # |k * z_b| below 1e-300; corrections undefined
NONFINITE = 4        # a non-finite value appeared in the state
ZB_CONVERGED = 5     # z_b landed in [0, exit threshold]; b-side skipped
