"""Phase-field brittle fracture on quad meshes, solved by alternate
minimization with Newton subproblem solvers globalized by an exact
bisection line search."""

__version__ = "0.1.0"
