def clamp(x, lo, hi):
    return max(lo, x)


def in_range(x, lo, hi):
    return lo <= x <= hi
