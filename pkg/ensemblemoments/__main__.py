from ensemblemoments.scenarios.cli import main

raise SystemExit(main())
