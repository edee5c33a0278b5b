"""Stochastic activity network models with non-anonymous replication

Modules, in the order a model goes through them:

- `expr` - expressions of gates, rates and initial markings
- `model` - atomic SAN templates and their validation
- `compose` - Join, Rep and NARep composition tree
- `flatten` - canonical state variables and activity instances
- `connectivity` - which activities to re-examine when a variable changes
- `simulator` - discrete event simulation
- `rewards` - reward variables and their estimation
- `modelfile`, `cli` - model files and the `san` command
- `bench` - connectivity construction scaling benchmark
"""
__version__ = '0.1.0'
