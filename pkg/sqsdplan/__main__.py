from sqsdplan.cli import main

main()
