def eat_bread_on_sofa():
    # Step 1: Pick up the bread
    walk('livingroom')
    find('bread')
    grab('bread')
    # Step 2: Sit on the sofa
    assert('close' to 'sofa')
        else: find('sofa')
    sit('sofa')
    # Step 3: Eat the bread
    eat('bread')
