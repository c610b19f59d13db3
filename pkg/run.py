import retmil


retmil.run()
