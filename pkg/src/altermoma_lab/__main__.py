from sys import exit

import click

from altermoma_lab import log
from altermoma_lab.cli import data, env, model, oracle, pruning
from altermoma_lab.utils.exceptions import AlterMomaException

cli = click.CommandCollection(
    sources=[data, model, pruning, oracle, env],
    context_settings={'help_option_names': ['-h', '--help']}
)


def main(args=None) -> int:
    """Run the CLI and translate errors into exit codes: 1 usage, 2 failed verification, 3 I/O or corrupt file."""
    try:
        cli.main(args=args, prog_name='altermoma-lab', standalone_mode=False)
    except click.exceptions.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except click.ClickException as e:
        e.show()
        return 1
    except AlterMomaException as e:
        log.error(str(e))
        return e.exit_code
    except ValueError as e:
        log.error(str(e))
        return 1
    except OSError as e:
        log.error(str(e))
        return 3
    return 0


if __name__ == '__main__':
    exit(main())
