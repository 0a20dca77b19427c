# Return codes shared by the compiled event loops.
EXTINCT = 1
POP_CAP = 2
TIME_CAP = 3
EVENT_CAP = 4
STEPPED = 5
ROOT_DEAD = 6
GROW_SLOTS = 10
GROW_GENEALOGY = 11
GROW_SERIES = 12
COORD_OVERFLOW = 20

EV_BIRTH = 1
EV_DEATH = 2
