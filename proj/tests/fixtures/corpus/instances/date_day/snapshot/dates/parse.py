def parse_day(text):
    day, month, year = text.split("/")
    return int(month)
