from kahlerseq.cli import main

raise SystemExit(main())
