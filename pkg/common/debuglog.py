import os
import sys
import logging

from colorama import init as init_colorama
from termcolor import colored


PID_PREFIX = '[pid {0}] '.format(os.getpid())
DEBUG = os.environ.get('NDG_DEBUG') == "True"

logger = logging.getLogger('ndg')
if not logger.handlers:
	_handler = logging.StreamHandler(sys.stderr)
	_handler.setFormatter(logging.Formatter('%(message)s'))
	logger.addHandler(_handler)
	logger.propagate = False
logger.setLevel(logging.DEBUG if DEBUG else logging.INFO)


def set_debug(enabled):
	global DEBUG
	DEBUG = bool(enabled)
	logger.setLevel(logging.DEBUG if DEBUG else logging.INFO)


# XXX: maybe these should be to stdout instead of stderr, I dunno
def debug(msg, force_debug=False):
	if DEBUG or force_debug:
		logger.info(u"{0}{1}".format(PID_PREFIX, msg))

def mention(msg):
	logger.info(u"{0}{1}".format(PID_PREFIX, msg))


def colour_on():
	init_colorama()

def red(msg):
	return colored(msg, 'red')
def green(msg):
	return colored(msg, 'green')

def verdict(ok):
	return green("PASS") if ok else red("FAIL")
