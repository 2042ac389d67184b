from honeyscan.cli import main

main()
