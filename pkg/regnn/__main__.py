from regnn.main import main

main()
