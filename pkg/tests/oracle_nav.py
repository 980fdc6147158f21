"""Independent shortest-path oracle for the gridworld tests.

Implemented as plain frontier expansion over Python sets, no numpy and
no imports from the package, so it cannot share a bug with the
package's queue-based search.
"""


def oracle_distances(water_rows, goal):
    """water_rows: list of lists of bools; returns dict cell -> steps."""
    n = len(water_rows)
    m = len(water_rows[0])
    gr, gc = goal
    if water_rows[gr][gc]:
        return {}
    dist = {(gr, gc): 0}
    frontier = {(gr, gc)}
    steps = 0
    while frontier:
        steps += 1
        nxt = set()
        for r, c in frontier:
            for nr, nc in ((r - 1, c), (r + 1, c), (r, c + 1), (r, c - 1)):
                if 0 <= nr < n and 0 <= nc < m and not water_rows[nr][nc] \
                        and (nr, nc) not in dist:
                    dist[(nr, nc)] = steps
                    nxt.add((nr, nc))
        frontier = nxt
    return dist
