"""Dense tensor engine with reverse-mode automatic differentiation

The engine is deliberately small: a `Graph` is an ordered list of nodes taken from a fixed set of primitives
(see `OpType`), every value is a float64 numpy array and gradients are computed by walking the node list
backwards.

Interaction with this module happens through `tensor_core.lib` (`forward`, `backward`, `sgd_step`, ...).
"""
