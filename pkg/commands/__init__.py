"""Command handlers behind the main.py subcommands"""

from commands.certify import cmd_certify
from commands.compare import cmd_compare
from commands.data_prep import cmd_data_prep
from commands.train import cmd_train

COMMANDS = {
    'data-prep': cmd_data_prep,
    'train': cmd_train,
    'certify': cmd_certify,
    'compare': cmd_compare,
}
