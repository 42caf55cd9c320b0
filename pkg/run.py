from geolab import create_cli

# Create command-line application
cli = create_cli()

if __name__ == '__main__':
    cli(prog_name='geolab')
