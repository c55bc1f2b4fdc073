from ._pbnn import *  # noqa: F401,F403
