# MaskedCLIP desk test suite
