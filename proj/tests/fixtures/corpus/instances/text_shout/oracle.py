import os
import sys

sys.path.insert(0, os.getcwd())
from text.util import shout, whisper

if shout('hi') != 'HI!':
    print('wrong:', "shout('hi')")
    sys.exit(1)
if shout('Go') != 'GO!':
    print('wrong:', "shout('Go')")
    sys.exit(1)
if whisper('Hi') != 'hi...':
    print('wrong:', "whisper('Hi')")
    sys.exit(1)
sys.exit(0)
