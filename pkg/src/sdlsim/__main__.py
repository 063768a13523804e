from .studyctl import main

main()
