"""chainsolve: chain-structure ground states of the Schroedinger-Poisson system on a periodic slab."""
