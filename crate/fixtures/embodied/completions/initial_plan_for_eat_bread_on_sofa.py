def initial_plan_for_eat_bread_on_sofa():
    # Step 1: Locate sofa and bread
    walk('livingroom')
    find('sofa')
    # Step 2: Pick up the bread
    assert('close' to 'bread')
        else: find('bread')
    grab('bread')
    # Step 3: Sit on the sofa
    sit('sofa')
    # Step 4: Eat the bread
    eat('bread')
