from odisco.cli import main

main()
